"""
Application Entry Point
Redirects to main application module
"""

import sys

from src.app.main import main

if __name__ == "__main__":
    sys.exit(main())
