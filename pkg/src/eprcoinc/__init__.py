"""Coincidence identification and Bell/no-signaling statistics for two-station detection logs."""

__version__ = "0.1.0"

from .bell import ChshReport, NoSignalReport, chsh, correlation, no_signaling
from .coincidence import (PRESETS, RULES, CellTable, CoincidenceSet, WindowSpec,
                          brute_force_coincidences, count_coincidences, find_coincidences,
                          sweep_widths, tabulate_cells)
from .delay import (DelayGrid, DelayModel, DtDensitySet, estimate_density, fit_delay_model,
                    observed_dt_densities, predict_dt_density)
from .eventlog import (DetectionLog, LogFormatError, SinglesTable, load_log, read_log, save_log,
                       singles_counts, validate_log, write_log)
from .fairsample import (EfficiencyRatios, InfeasibleError, decompose, masanes_check,
                         normalized_probabilities, per_cell_false_positives,
                         solve_efficiency_ratios)
from .strips import (FalsePositiveModel, StripHistogram, build_strip_histogram,
                     find_excess_ranges, fit_false_positive_model, poisson_dispersion_test,
                     suggest_window)
from .synth import GroundTruth, SyntheticConfig, generate
from .units import ns_to_ps, ps_to_ns

__all__ = [
    "CellTable", "ChshReport", "CoincidenceSet", "DelayGrid", "DelayModel", "DetectionLog",
    "DtDensitySet", "EfficiencyRatios", "FalsePositiveModel", "GroundTruth", "InfeasibleError",
    "LogFormatError", "NoSignalReport", "PRESETS", "RULES", "SinglesTable", "StripHistogram",
    "SyntheticConfig", "WindowSpec", "brute_force_coincidences", "build_strip_histogram", "chsh",
    "correlation", "count_coincidences", "decompose", "estimate_density", "find_coincidences",
    "find_excess_ranges", "fit_delay_model", "fit_false_positive_model", "generate", "load_log",
    "masanes_check", "no_signaling", "normalized_probabilities", "ns_to_ps",
    "observed_dt_densities", "per_cell_false_positives", "poisson_dispersion_test",
    "predict_dt_density", "ps_to_ns", "read_log", "save_log", "singles_counts",
    "solve_efficiency_ratios", "suggest_window", "sweep_widths", "tabulate_cells",
    "validate_log", "write_log",
]
