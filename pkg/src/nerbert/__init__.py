"""Small BERT-style encoder stack for NER fine-tuning experiments.

Covers the full pipeline: corpus ingestion, subword tokenization with a
token-to-word map, masked-language-model pre-training (optionally whole-word),
a transformer encoder with absolute, relative, or whole-word attention,
four NER heads (softmax, class-start-end, linear-chain CRF, CRF with learned
transition penalties), decoding with the entity-fix rule, and entity-wise F1
scoring.
"""

__version__ = "0.1.0"
