# sampling time of the closed loop [s]
DT = 0.1
# number of sampling instants per series
STEPS = 100

# detection threshold on ||dz_I||_inf [rad]
TAU_D = 1e-5
# identification threshold on |da_i| [p.u.]
EPS_I = 1e-5

# residual tolerance standing in for the equality constraints
TOL_FEAS = 1e-8
# relative pivot tolerance when dropping dependent sensitivity columns
TOL_RANK = 1e-10
# relative tolerance on triangular diagonals in least squares
LSQ_RTOL = 1e-12

# proportional frequency feedback [p.u. s]
CONTROLLER_GAIN = 0.5

# curvature estimation box, sampling and safety factor
K_BOX_RADIUS = 0.65
K_SAMPLES = 32
K_INFLATION = 1.2
K_FD_STEP = 1e-5

# oracle epsilon as a fraction of the smallest attacked magnitude
EPS_ORACLE_FRACTION = 0.9
