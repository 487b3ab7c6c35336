# tests/system 模块
