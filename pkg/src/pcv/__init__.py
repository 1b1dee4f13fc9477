"""Valuation, derivative pricing and hedging for companies whose market price is not observed.

Book-value growth and macro variables drive a linear Gaussian state space in
the log price-to-book ratio.  Submodules:

``model``, ``stacked``
    parameters, panel data, linearization and the stacked state-space system
    under the real, risk-neutral and forward measures
``kalman``, ``em``
    filtering, smoothing, forecasting and maximum-likelihood estimation
``pricing``, ``hedging``
    bonds, options, equity-linked insurance and locally risk-minimizing hedges
``montecarlo``, ``verify``
    simulation oracles and the acceptance checks
``datafiles``, ``cli``
    CSV input/output and the ``pcv`` command
"""

__version__ = "0.1.0"
