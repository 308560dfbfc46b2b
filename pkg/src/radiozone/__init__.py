"""Proactive RSS prediction and interference-boundary proposal toolkit.

Pipeline: synthetic environment generation -> crowdsourced measurement
collection -> path-loss fit -> tomographic loss-field reconstruction ->
RSS predictors (analytic and learned, trained with an asymmetric loss) ->
boundary proposal and transmit-power adaptation for secondary transmitters.
"""

__version__ = "0.1.0"
