"""Active ownership learning: who owns what, learned by asking good questions.

A Bayesian mixture ties each object's position, attributes, and user
answers to a latent ownership concept; a Rao-Blackwellized particle
filter tracks the posterior online, and questions are chosen to maximize
the expected information gain about the ownership partition.
"""

__version__ = "0.1.0"
