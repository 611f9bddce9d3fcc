namespace tvio {}
