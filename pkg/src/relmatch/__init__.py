"""Instance-based relation extraction for simple questions over a KB.

A new question is matched against pooled training questions with a
two-channel interaction-matrix CNN and against candidate relations with
BiLSTM encoders; the two scores are combined with learned weights and the
relation is predicted by majority vote among the top-k matches.
"""

__version__ = "0.1.0"
