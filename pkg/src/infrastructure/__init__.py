"""
Infrastructure module - Persistence and simulated device implementations
"""
