"""
Column schemas for dirac-loc data and plot files
"""


def gamma_columns(N: int) -> list:
    return [f"gamma_{p}" for p in range(1, 2 * N + 1)] + [f"stderr_{p}" for p in range(1, 2 * N + 1)]


def data_columns(command: str, N: int) -> list:
    """Column names of the data file written by a command."""
    if command == "lyapunov":
        return ["energy", *gamma_columns(N), "symmetry_residual", "degeneracy_residual", "vanishing"]
    if command == "scan":
        return ["energy", *gamma_columns(N), "sum_gamma", "sum_stderr", "vanishing"]
    return list(DATA_COLUMNS[command])


DATA_COLUMNS = {
    "lie": ("energy", "dim", "classification", "closed", "sp_dim", "spo_dim"),
    "threshold": ("lambda_max", "lambda_min", "ell_c", "ell", "d_log_o", "interval_low", "interval_high", "empty"),
    "critical": ("energy", "dim", "refined"),
    "ids": ("energy", "F", "stderr", "F0"),
    "thouless": ("a_fit", "max_residual", "truncation_bound", "ids_min", "ids_max", "eval_min", "eval_max"),
    "green": ("L", "median", "q25", "q75", "singular"),
    "ildse": ("L", "m", "p_hat", "ci_low", "ci_high", "samples"),
    "ldp": ("n_cells", "p", "eps", "gamma_ref", "p_hat", "ci_low", "ci_high", "exceedances", "samples"),
    "wegner": ("L", "radius", "p_hat", "ci_low", "ci_high", "samples"),
    "group-check": ("tag", "count"),
}

# kind -> (source columns, output columns); a third source column is the error band
PLOT_COLUMNS = {
    "gamma_vs_E": (("energy", "sum_gamma", "sum_stderr"), ("E", "sum_gamma", "band")),
    "ids": (("energy", "F", "stderr"), ("E", "F", "band")),
    "decay": (("L", "median", "q25", "q75"), ("L", "median", "q25", "q75")),
    "dim_vs_E": (("energy", "dim"), ("E", "dim")),
}
