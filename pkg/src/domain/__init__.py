"""
Domain module - Data models and infrastructure interfaces
"""
