# Configuration for the microgrid generation game solver
# Units, tolerances and solver defaults

# Power base for per-unit conversion (MVA)
BASE_MVA = 100.0

# Sensitivity matrix checks
SYMMETRY_RTOL = 1e-10
NONNEG_ATOL = 1e-12
INVERSE_ATOL = 1e-9

# Update schemes
DEFAULT_DELTA_PU = 1e-6
DEFAULT_MAX_STEPS = 1000
DEFAULT_SEED = 0
# Contraction conditions count as met only below 1 by this margin
CONDITION_MARGIN = 1e-12

# Team / potential problem (projected gradient)
TEAM_MAX_ITER = 100_000
TEAM_TOL = 1e-9
ARMIJO_SIGMA = 1e-4
BACKTRACK_FACTOR = 0.5
# NE and team costs this close count as equal
LOE_RTOL = 1e-12

# Brute-force best response oracle
BRUTE_FORCE_POINTS = 100_000
BRUTE_FORCE_XTOL = 1e-9

# Run artifacts
TRAJECTORY_CSV = "trajectory.csv"
SUMMARY_TXT = "summary.txt"
GENERATION_SVG = "generation.svg"
ANGLES_SVG = "angles.svg"
SWEEP_CSV = "sweep.csv"
TRAJECTORY_COLUMNS = ("step", "bus", "p_gen_mw", "theta_rad", "step_change_mw")

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONDITION_NOT_MET = 2
EXIT_SOLVER_ERROR = 3
