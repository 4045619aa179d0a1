"""Desk-scale checks of the reasoning limits of language-model planners:
a dynamic programming engine with its edge-list serialization, the
frequency law of next-node logits and the permutation probe.
"""
