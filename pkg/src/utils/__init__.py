"""
Utility Functions
"""

