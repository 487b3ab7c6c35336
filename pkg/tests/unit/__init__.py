# tests/unit 模块
