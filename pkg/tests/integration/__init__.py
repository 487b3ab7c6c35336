# tests/integration 模块
