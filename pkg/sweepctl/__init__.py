"""
sweepctl

Controlled Moreau sweeping processes over prox-regular moving sets:
catching-up simulation, discrete approximations with error budgets,
free-time discrete optimal control, necessary-condition residuals and
the two-agent corridor crowd-motion model.
"""

__version__ = "1.0.0"
