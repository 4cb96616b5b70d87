"""End-to-end latent diffusion world model at desk scale.

Subpackages cover the full pipeline: pixel encoder and conditional denoiser
trained jointly through a denoising objective, recurrent reward/termination
head, imagination-trained actor-critic, toy pixel environments, benchmark
score aggregation, and an exact discrete oracle for the variational
information-bottleneck identities that motivate the training objective.
"""

__version__ = "0.1.0"
