"""Numerical core: fundamental solutions, payoffs, the smooth-fit solver, sensitivity marching, empirical estimation and simulation."""
