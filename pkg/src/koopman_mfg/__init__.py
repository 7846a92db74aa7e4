"""Graph-regularized Koopman mean-field control toolkit."""
