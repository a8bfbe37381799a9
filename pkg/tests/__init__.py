"""
ICRED Test Suite
"""
