if __name__ == "__main__":
    from otsep.cli.main import app
    app()
