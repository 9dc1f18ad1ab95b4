"""Explicit implied-volatility expansions for local-stochastic volatility models."""
from .blackscholes import (BSContext, bs_price, bs_sigma_deriv_ratio, bs_tau_deriv, bs_vega,
                           bs_x_deriv, bs_xk_derivs, heat_kernel_term, implied_vol)
from .combinatorics import BiPoly, bell_partial, hermite, vega_ratio_ccoeffs
from .errors import (BranchInstability, CancellationFailure, DerivativeUnavailable, ExpansionError,
                     NegativeVolWarning, NoConvergence, NonPositiveVariance, OrderOverflow,
                     OutOfArbitrageBounds, SymbolicUnavailable)
from .harness import ConvergenceStudySpec, OrderFitReport, run_convergence, run_table1
from .iv_expansion import (IVExpansion, IVTaylorTable, VolQuote, hermite_form, iv_expansion,
                           iv_taylor_coeffs, iv_taylor_eval, lv_time_derivative, sigma_bar_N, sigma_n)
from .models import (ModelSpec, TaylorTensor, build_model, builtin_bs, builtin_cev, builtin_heston,
                     builtin_lsv, builtin_lv, custom_model, taylor_tensor)
from .opalgebra import NormalOrderedOperator, TimePoly, op_compose, op_from_taylor_generator, op_reduce_at_center
from .price_expansion import ExpansionContext, build_Ln, price_bar_N, sigma0, un_coefficients
from .reference import (CEVDensityParams, HestonParams, cev_call_price, cev_semidensity, heston_call_price,
                        heston_cf, mc_price, reference_iv, reference_price)

__version__ = "0.1.0"
