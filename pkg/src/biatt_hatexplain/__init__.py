"""Attention-supervised BiRNN hate-speech classifier with explainers and bias metrics.

Pure numpy/scipy: a small reverse-mode autodiff engine (:mod:`.tensor`), the
annotation pipeline (:mod:`.data`), GRU/LSTM encoders with matrix or BiAtt
attention heads (:mod:`.models`), training (:mod:`.training`), LIME and exact
Shapley explainers (:mod:`.explainers`), evaluation metrics (:mod:`.metrics`)
and a command line (:mod:`.cli`).
"""

__version__ = "0.1.0"
