"""
Storage - Persistenza su file
"""
