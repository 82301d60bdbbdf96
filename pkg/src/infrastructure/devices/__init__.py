"""
In-Process Simulated Devices
"""
