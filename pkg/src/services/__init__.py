"""
Services Module - Geometry, losses, training, statistics and sharding
"""
