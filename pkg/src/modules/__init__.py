"""
Wildnet Pipeline Modules Package
"""

__version__ = "1.0.0"
__author__ = "Wildnet Team"
