"""Graph-based proprioceptive localization.

Road maps are compiled into a heading-length graph, vehicle trajectories are
dead-reckoned from IMU/compass/wheel logs, and the straight segments of the
trajectory are matched against the graph to obtain a global fix that is then
kept drift-free by aligning each new segment to the map.
"""

__version__ = "0.1.0"
