"""
Test suite for the X-ray DPN-SE Toolkit.
"""
