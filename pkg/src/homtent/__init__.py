"""homtent: periodic cell correctors, Whitney locally-periodic coefficient
fields, and Carleson/DKP tent functionals for Dirichlet problems on a strip."""

__version__ = "0.1.0"
