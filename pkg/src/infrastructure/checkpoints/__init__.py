"""
Checkpoint Store Implementations
"""
