"""jacobi-rl - learned pivot and sweep orderings for Jacobi diagonalization."""

__version__ = "0.1.0"
