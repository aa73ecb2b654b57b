import os
import time
import logging
import datetime as dt
import concurrent.futures

from evselca import db, harness
from evselca.types import GaConfig, SweepSpec

start = time.time()
logging.basicConfig(level=logging.WARNING, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

SWEEPS = {
    't_delta_min': dict(levels=(1, 5, 10, 15, 30, 60), baseline=60),
    'charger_cost_pct': dict(levels=(0, -20, -40, -60, -80)),
    'energy_cost_pct': dict(levels=(0, 25, 50, 75, 100)),
    'vot_pct': dict(levels=(0, 25, 50, 75, 100)),
    'range_miles': dict(levels=(60, 90, 110, 130, 250)),}

REPLICATIONS = int(os.environ.get('EVSELCA_REPLICATIONS', 5))
GA = GaConfig(pop_size=20, iterations=30, parents=4, time_limit_s=30.0)

#Set up database
filename = dt.datetime.now().strftime('Evselca_Runs_%Y_%m_%d.db')
get_connection = db.initialize_database(filename, filepath='data', hard_reset=True)

instance = harness.gen_instance(n_routes=6, stops_per_route=6, n_facilities=4, seed=2025)

def multithread_sweep(axis):
    try:
        print(f'Sweeping {axis}')
        spec = SweepSpec(axis=axis, replications=REPLICATIONS, instance=instance, ga=GA, **SWEEPS[axis])
        run_id = db.next_run_id()
        df = harness.run_sweep(spec, get_connection, run_id)
        harness.write_sweep_csv(df, os.path.join('data', f'sweep_{axis}.csv'))
        print(f'Completed sweeping {axis}')
    except Exception as e:
        print(f'Error sweeping {axis}: {e}')

with concurrent.futures.ThreadPoolExecutor(max_workers=len(SWEEPS)) as executor:
    executor.map(multithread_sweep, list(SWEEPS))

#GA against the exact oracle on small instances
print('Comparing GA with the exact oracle')
small = [harness.gen_instance(3, 3, 3, extent=4.0, seed=seed) for seed in range(20)]
gaps = harness.gap_table(small, GA._replace(time_limit_s=None), replications=5)
gaps.to_csv(os.path.join('data', 'oracle_gaps.csv'), index=False, float_format='%.6f')
print(f"Mean gap {gaps['gap_pct'].mean():.2f}%, max gap {gaps['gap_pct'].max():.2f}%")

end = time.time()
print(f"\nExecution Time: {(end - start)/60:.2f} minutes")
