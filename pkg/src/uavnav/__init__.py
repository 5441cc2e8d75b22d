"""Grid-world motion planning for a ground vehicle guided by a hovering camera drone.

The drone sees only a window of the map around itself.  Planners here
range from A* variants restricted to that window up to a learned two-mode
network (value-iteration planner plus external memory).
"""
__version__ = "0.1.0"
