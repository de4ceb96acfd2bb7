"""Delay-compensated boundary stabilization of 1-D reaction-diffusion equations."""
