"""Raw records to abstract trajectories, plus call-record and GPS preprocessing."""
from .filters import apply_cdr_filters, filter_active_users, filter_cdr_locations, observation_days
from .gps import (
    Trip,
    filter_active_vehicles,
    segment_gps_trips,
    snap_to_tessellation,
    snapped_key,
    stop_threshold_sweep,
    trips_to_records,
)
from .records import (
    AbstractTrajectory,
    RawRecord,
    assign_slots,
    coordinate_key,
    group_by_user,
    read_abstract_trajectories,
    read_records,
    write_abstract_trajectories,
)
