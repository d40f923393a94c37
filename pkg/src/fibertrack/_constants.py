SPEED_FLOOR = 0.1  # stop tracking when |V̂| drops below this
DOMAIN_MARGIN_BANDWIDTHS = 2.0  # tracking stops outside the domain inflated by this many h per side
PSD_RELATIVE_TOL = 1e-10  # negative eigenvalues beyond tol * trace count as a PSD violation

DEFAULT_DRAWS = 200_000
MIN_DRAWS = 1_000
CHUNK_DRAWS = 25_000  # one RNG substream per chunk of limit-law draws
DEFAULT_STUDY_DRAWS = 20_000  # law draws per replication inside Monte Carlo studies

GRAD_FLOOR_RELATIVE = 1e-3
GRAD_FLOOR_NOISE_FACTOR = 3.0
UNCERTAIN_BAND_FACTOR = 2.0
VANISHING_CURVATURE_TOL = 0.05
TIE_TOL = 1e-12

ON_CURVE_TOL = 1e-6  # true distances below this count as D = 0
HISTOGRAM_BINS = 30
DEFAULT_ELLIPSE_EVERY = 10
