"""Conservative stochastic primal-dual solver for tabular discounted CMDPs."""
