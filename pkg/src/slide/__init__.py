"""Two-channel spontaneous spoken dialogue generation at desk scale.

Pipeline: textual dialogue -> written phoneme sequences -> duration-predicted
spoken phoneme timelines -> conditioned unit-token generation, plus
turn-taking analytics and transcript perplexity scoring.
"""

__version__ = "0.1.0"
