import os
from dotenv import load_dotenv

load_dotenv()

# Logging and output locations from environment variables.
LOG_FILE = os.getenv("AXON_LOG_FILE", "axon_growth.log")
LOG_LEVEL = os.getenv("AXON_LOG_LEVEL", "INFO")
OUT_DIR = os.getenv("AXON_OUT_DIR", "out")
KERNEL_CACHE = os.getenv("AXON_KERNEL_CACHE") or None

# Biophysical constants (SI units)
NOMINAL_PARAMS = {
    "D": 1e-5,          # m^2/s
    "a": 1e-8,          # m/s
    "g": 5e-7,          # 1/s
    "r_g": 1.783e-5,    # m^4/(mol s)
    "r_g_tilde": 0.053, # 1/s
    "l_c": 4e-6,        # m
    "c_inf": 0.0119,    # mol/m^3
}
SETPOINT_LENGTH = 12e-6
INITIAL_LENGTH = 1e-6

# Default control parameters. One gamma value serves both boundary gains.
DEFAULT_GAINS = {
    "lambda": 0.05,
    "gamma1": 1e4,
    "gamma2": 1e4,
    "K": (-0.1, 1e13),
    "L": (1.0, 0.1),
}

# Numerics
GRID_N = 128
TIME_STEP = 1e-3
OUTPUT_EVERY = 0.5
KERNEL_GRID_N = 129
KERNEL_TOL = 1e-12
KERNEL_MAX_DEPTH = 200
SETTLE_RATE = 0.1
