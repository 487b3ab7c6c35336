# src/common 通用组件：配置、日志、异常、二进制容器
