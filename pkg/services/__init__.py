"""
Services - Generazione di task set e trace, esperimenti batch
"""
