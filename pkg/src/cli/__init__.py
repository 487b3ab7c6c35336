# src/cli 命令行入口
from .main import build_parser, main, run
