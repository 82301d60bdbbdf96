"""
Application Module - Command-line interface
"""
