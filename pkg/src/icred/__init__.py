"""
ICRED - response generation for multi-party conversations.

Interlocutor-aware encoder/decoder with addressee memory, trained with a small
numpy autodiff engine.
"""

__version__ = "0.1.0"
