from evselca.types import ChargerSpec, Facility, Instance, Route, Stop

# At 30 mph one mile takes two minutes, so every number below can be checked by hand.
SLOW_FAST = (
    ChargerSpec(0, 'slow', 60.0, 100.0, 200.0, 36_500.0),   # R = 1, 10 USD/day, 0.43 USD/min
    ChargerSpec(1, 'fast', 120.0, 100.0, 100.0, 73_000.0),  # R = 2, 20 USD/day, 0.86 USD/min
)

FACILITIES = (
    Facility(0, 0.0, 0.0),    # at the depot, detour 0
    Facility(1, 20.0, 5.0),   # detour 20 min
    Facility(2, 300.0, 0.0),  # out of reach
)

VOT_PER_MIN = 1.377 * 30 / 60

# one route charging 44 min on the slow charger at facility 0, one charger there
SLOW_TOTAL = 35.0 + 10.0 + 44 * (VOT_PER_MIN + 0.43)
# the same 44 battery minutes in 22 min on the fast charger; the optimum of one route
FAST_TOTAL = 35.0 + 20.0 + 22 * (VOT_PER_MIN + 0.86)


def make_route(r: int) -> Route:
    # depot -> (10, 0) -> (20, 0) -> depot: legs 20 and 40 min, internal 20 min, service 10 min
    stops = (Stop(f'r{r}a', 10.0, 0.0, 5.0), Stop(f'r{r}b', 20.0, 0.0, 5.0))
    return Route(r, (0.0, 0.0), stops, initial_battery_min=196.0, final_battery_min=160.0)

def make_instance(n_routes: int = 1, **changes) -> Instance:
    instance = Instance(
        routes=tuple(make_route(r) for r in range(n_routes)),
        facilities=FACILITIES,
        chargers=SLOW_FAST)
    return instance._replace(**changes)
