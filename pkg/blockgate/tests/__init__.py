"""This package is for end-to-end tests.

Unit tests live side-by-side with tested modules.
"""
