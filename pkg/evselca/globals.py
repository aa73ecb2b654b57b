import threading

# These quasi global variables are shared between evselca modules and worker threads

lock = threading.Lock() # To prevent racing conditions

VERSION = '0.3.0'
ENV_PREFIX = 'EVSELCA_'
TIMEZONE = 'UTC'

# Handed out by db.next_run_id(), reloaded from the run ledger on start-up
run_id_counter = 1

# Default parameters of a regional freight fleet (USD, minutes, miles)
FACILITY_COST_PER_DAY = 35.0
SERVICE_MIN = 2.0
MAX_SHIFT_MIN = 14 * 60.0
BATTERY_CAP_MIN = 200.0
INITIAL_BATTERY_MIN = 200.0
FINAL_BATTERY_MIN = 160.0
ENERGY_PRICE_USD_PER_KWH = 0.43
VOT_USD_PER_MILE = 1.377
TRUCK_SPEED_MPH = 30.0
TIME_STEP_MIN = 15.0
EPSILON_MIN = 1e-3
CHARGER_LIFESPAN_DAYS = 10 * 365.0
FACILITY_LIFESPAN_DAYS = 40 * 365.0

# Within-cluster travel cap as a share of the battery budget
INTRA_CAP_FRAC = 0.5

# Numerical slack used when comparing minutes
TOL = 1e-9
