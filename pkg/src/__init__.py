"""This module builds the application that hosts the planner commands.
The flask command line interface calls the factory::

    $ export FLASK_APP=src:create_app()
    $ flask eval --config runs/huggingface.toml

Commands reach the running application, its configuration and its
logger through ``current_app``. The environment defaults come from
:file:`settings.py`, picked by ``FLASK_TESTING`` or ``FLASK_DEBUG``.
"""
from flask import Flask

from src import commands, extensions, models, settings


def create_app() -> Flask:
    """Build the application with its environment defaults, shared
    singletons and planner commands.

    .. seealso:: :file:`settings.py` for the environment defaults.

    :return: The application instance.
    :rtype: Flask
    """
    app = Flask(__name__)
    config = settings.get_config()
    app.config.from_object(config)

    register_extensions(app)
    register_commands(app)
    register_shellcontext(app)

    return app


def register_extensions(app: Flask):
    """Register the shared singletons to the application instance
    from the extensions initialized in :file:`extensions.py`.

    :param app: The application instance.
    :type app: Flask
    """
    extensions.limiter.init_app(app)
    extensions.recorder.init_app(app)


def register_commands(app: Flask):
    """Register the click commands defined in :file:`commands.py`.

    :param app: The application instance.
    :type app: Flask
    """
    for command in commands.COMMANDS:
        app.cli.add_command(command)


def register_shellcontext(app: Flask):
    """Expose the shared singletons and graph loading in
    ``flask shell``.

    :param app: The application instance.
    :type app: Flask
    """
    shell_context = {
        "limiter": extensions.limiter,
        "recorder": extensions.recorder,
        "TaskGraph": models.TaskGraph,
        "load_graph": models.load_graph,
    }

    app.shell_context_processor(lambda: shell_context)
