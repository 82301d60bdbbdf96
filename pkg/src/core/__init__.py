"""
Core module - Configuration, exceptions, and logging
"""

