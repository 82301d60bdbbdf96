"""
Report Writer Implementations
"""
