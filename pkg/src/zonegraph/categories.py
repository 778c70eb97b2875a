"""Goal-object vocabulary and room taxonomy shared across the stack."""

GOAL_CATEGORIES = (
    "AlarmClock",
    "Book",
    "Bowl",
    "CellPhone",
    "Chair",
    "CoffeeMachine",
    "DeskLamp",
    "FloorLamp",
    "Fridge",
    "GarbageCan",
    "Kettle",
    "Laptop",
    "LightSwitch",
    "Microwave",
    "Pan",
    "Plate",
    "Pot",
    "RemoteControl",
    "Sink",
    "StoveBurner",
    "Television",
    "Toaster",
)

GOAL_SET = frozenset(GOAL_CATEGORIES)

# Categories held out of training when running the zero-shot protocol.
ZERO_SHOT_TEST_GOALS = frozenset(
    {"Bowl", "DeskLamp", "Laptop", "LightSwitch", "Plate", "StoveBurner"}
)

ROOM_CATEGORIES = ("living_room", "kitchen", "bedroom", "bathroom")
