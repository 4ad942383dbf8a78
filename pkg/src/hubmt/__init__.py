"""Desk-scale toolkit for decoupled vocabulary learning in multilingual NMT:
monolingual embeddings aligned into a single hub space, frozen inside a
small Transformer translator, zero-shot plug-in of unseen languages, and
iterative back-translation."""

__version__ = "0.1.0"
