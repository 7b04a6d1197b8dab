"""Scenario builders shared by the tests."""

from covdrive.concretize import ConcreteScenario, EgoSpec, NPCSpec, Pose


def straight_scenario(sid="t", start=20.0, dest=380.0, speed=10.0, npcs=(), lane="main_0", route=None, maneuver=0.0):
    ego = EgoSpec(Pose(lane, start), Pose((route or [lane])[-1], dest), list(route or [lane]), speed,
                  maneuver_offset=maneuver)
    return ConcreteScenario(sid, "two_lane_straight", {"id": "main", "kind": "road", "structure": "STRAIGHT"}, {},
                            ego, list(npcs), vehicle_range=(0, 3))


def npc(nid, offset, speed=0.0, program="follow-lane", lane="main_0", **extra):
    beh = {"program": program, "speed": speed}
    beh.update(extra)
    return NPCSpec(nid, [lane], offset, beh)


class NoBrake:
    """Holds speed and steers straight; never reacts to anything."""

    def reset(self, scenario, g):
        pass

    def step(self, obs):
        from covdrive.simcore import Control

        return Control(0.0, 0.0)
