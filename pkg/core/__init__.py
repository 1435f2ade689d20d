"""
Core - Modello FMC, analisi off-line, regolazione dei livelli di servizio e simulatore
"""

__version__ = "1.0.0"
