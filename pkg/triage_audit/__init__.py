# Paquete de auditoría contrafactual de equidad en triaje ESI
