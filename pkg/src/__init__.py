"""
Angular Margin Loss Laboratory - Main Package
"""

__version__ = "1.0.0"
