"""
Test package for the Coexist Twin library.
"""
