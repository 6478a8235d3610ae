"""Desk-scale zero-shot speaker-characteristics modeling.

Speaker embeddings are attended over a learned bank of basis vectors; the
resulting representation conditions every layer norm of a small
non-autoregressive acoustic model; a KL loss over the basis attention
weights supervises generated mels. Trained in three stages on a synthetic
multi-speaker corpus with analytically recoverable speaker identity.
"""

__version__ = "0.1.0"
