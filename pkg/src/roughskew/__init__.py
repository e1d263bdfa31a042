"""Short-maturity implied-volatility skew for rough and local-stochastic volatility models.

Submodules: ``numerics`` (special functions, factorizations, RNG), ``fbm``
(OU-superposition fractional Brownian motion), ``models`` (model zoo and path
simulation), ``pricing`` (Black-Scholes, implied vol, Monte Carlo puts),
``asymptotics`` (closed-form expansions, skew estimation, power-law fits) and
``harness`` (configuration, experiments and the ``roughskew`` CLI).
"""
__version__ = "0.1.0"
