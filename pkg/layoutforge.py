#!/usr/bin/env python3
# layoutforge.py 命令行入口脚本
import sys

from src.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
