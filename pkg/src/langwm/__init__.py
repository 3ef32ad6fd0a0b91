"""langwm: a language-conditioned world-model agent at desk scale.

The agent learns a recurrent latent world model over (image, token) streams
by future-representation prediction, and trains an actor-critic entirely on
imagined rollouts. Ships with two token-streaming gridworld environments, a
text-only pretraining mode, and a CLI.
"""

__version__ = "0.1.0"
